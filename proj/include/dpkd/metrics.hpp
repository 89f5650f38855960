// Copyright 2026 The DPKD Lab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Per-epoch training record and its CSV form.

#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dpkd/error.hpp"

namespace dpkd {

struct MetricsRow {
  int epoch = 0;
  double kd_loss = 0.0;
  double lm_loss = 0.0;
  double total_loss = 0.0;
  double mean_implicit_reward = 0.0;
  double first_token_kld = 0.0;
  double first_token_rkld = 0.0;
  double rouge_l = 0.0;
  double wall_ms = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,kd_loss,lm_loss,total_loss,mean_implicit_reward,first_token_kld,"
    "first_token_rkld,rouge_l,wall_ms";

// Shortest text that parses back to the same double; "nan" for missing values.
inline std::string csv_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return fmt::format("{}", x);
}

inline double parse_csv_number(const std::string& cell) {
  if (cell == "nan") return std::nan("");
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (cell.empty() || end != cell.c_str() + cell.size())
    throw ParseError("bad numeric cell '" + cell + "'");
  return v;
}

inline std::string metrics_csv_line(const MetricsRow& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{}", r.epoch, csv_number(r.kd_loss),
                     csv_number(r.lm_loss), csv_number(r.total_loss),
                     csv_number(r.mean_implicit_reward), csv_number(r.first_token_kld),
                     csv_number(r.first_token_rkld), csv_number(r.rouge_l),
                     csv_number(r.wall_ms));
}

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += metrics_csv_line(r) + "\n";
  return out;
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader)
    throw ParseError("metrics CSV: unexpected header");
  std::vector<MetricsRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 9)
      throw ParseError(fmt::format("metrics CSV line {}: expected 9 cells, got {}", line_no,
                                   cells.size()));
    MetricsRow r;
    r.epoch = static_cast<int>(parse_csv_number(cells[0]));
    double* fields[] = {&r.kd_loss, &r.lm_loss, &r.total_loss, &r.mean_implicit_reward,
                        &r.first_token_kld, &r.first_token_rkld, &r.rouge_l, &r.wall_ms};
    for (std::size_t i = 0; i < 8; ++i) *fields[i] = parse_csv_number(cells[i + 1]);
    rows.push_back(r);
  }
  return rows;
}

// |total - (kd + lambda * lm)| for one row.
inline double total_loss_residual(const MetricsRow& r, double lambda) {
  return std::abs(r.total_loss - (r.kd_loss + lambda * r.lm_loss));
}

}  // namespace dpkd
