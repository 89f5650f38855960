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

// Optional external judge. Without an endpoint every call is `unavailable`;
// failures never propagate into the pipeline.
//
// Request:  POST <base_url>/score  {"prompt": s, "candidate": s, "reference": s}
//           Authorization: Bearer $DPKD_JUDGE_TOKEN (when set)
// Response: {"score": number}

#pragma once

#include <chrono>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "httplib.h"
#include "json.hpp"

namespace dpkd {

struct JudgeConfig {
  std::string base_url;  // e.g. http://127.0.0.1:8080; empty disables the judge
  std::string token;
  std::chrono::milliseconds timeout{2000};

  static JudgeConfig from_env(std::string base_url) {
    JudgeConfig cfg;
    cfg.base_url = std::move(base_url);
    if (const char* t = std::getenv("DPKD_JUDGE_TOKEN")) cfg.token = t;
    return cfg;
  }
};

struct JudgeResult {
  std::optional<double> score;  // empty = unavailable
  std::string reason;

  bool available() const { return score.has_value(); }
};

using JudgeLogger = std::function<void(const std::string&)>;

inline void log_to_stderr(const std::string& msg) { std::cerr << "judge: " << msg << '\n'; }

inline JudgeResult judge_client(const JudgeConfig& cfg, const std::string& prompt,
                                const std::string& candidate, const std::string& reference,
                                const JudgeLogger& log = log_to_stderr) {
  auto unavailable = [&](std::string reason) {
    if (log) log(reason);
    return JudgeResult{std::nullopt, std::move(reason)};
  };
  if (cfg.base_url.empty()) return JudgeResult{std::nullopt, "no endpoint configured"};

  try {
    httplib::Client client(cfg.base_url);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    httplib::Headers headers;
    if (!cfg.token.empty()) headers.emplace("Authorization", "Bearer " + cfg.token);
    const nlohmann::json body{{"prompt", prompt}, {"candidate", candidate}, {"reference", reference}};
    auto res = client.Post("/score", headers, body.dump(), "application/json");
    if (!res) return unavailable("request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      return unavailable("endpoint returned HTTP " + std::to_string(res->status));
    const auto reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded()) return unavailable("malformed reply: not JSON");
    if (!reply.is_object() || !reply.contains("score") || !reply["score"].is_number())
      return unavailable("malformed reply: missing numeric 'score'");
    return JudgeResult{reply["score"].get<double>(), ""};
  } catch (const std::exception& e) {
    return unavailable(std::string("client error: ") + e.what());
  }
}

}  // namespace dpkd
