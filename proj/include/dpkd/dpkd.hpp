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
#pragma once

#include "dpkd/cli.hpp"
#include "dpkd/data.hpp"
#include "dpkd/error.hpp"
#include "dpkd/eval.hpp"
#include "dpkd/gradients.hpp"
#include "dpkd/judge.hpp"
#include "dpkd/metrics.hpp"
#include "dpkd/objectives.hpp"
#include "dpkd/oracles.hpp"
#include "dpkd/seeding.hpp"
#include "dpkd/seqmodel.hpp"
#include "dpkd/table.hpp"
#include "dpkd/toy.hpp"
#include "dpkd/trainer.hpp"
#include "dpkd/verify.hpp"
