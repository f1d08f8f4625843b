// Copyright 2026 The moatsim Authors
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

// JSON encodings of verifier output, verdicts and scenario reports.

#pragma once

#include <string_view>

#include "json.hpp"
#include "moat/runtime.hpp"
#include "moat/scenario.hpp"
#include "moat/verifier.hpp"

namespace moat::report {

using Json = nlohmann::ordered_json;

Json verifier_json(const verifier::VerifierOutput& out);
Json counters_json(const runtime::Counters& c);
Json verdict_json(const runtime::Verdict& v, std::string_view scenario, const runtime::MoatConfig& cfg,
                  const runtime::Counters& counters);
Json report_json(const scenario::Report& r);

}  // namespace moat::report
