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

#include <gtest/gtest.h>

#include "moat/runtime.hpp"

namespace {

// Every run in the binary feeds the shadow tallies; none may record an
// escaped access or a run that failed to restore its switch state.
class ShadowLogCheck : public ::testing::Environment {
 public:
  void TearDown() override {
    const auto t = moat::runtime::shadow_totals();
    EXPECT_EQ(t.audit_violations, 0u) << "accesses escaped the BPF domain across " << t.runs << " runs";
    EXPECT_EQ(t.involution_breaks, 0u) << "enter/exit did not compose to the identity";
  }
};

}  // namespace

int main(int argc, char** argv) {
  ::testing::InitGoogleTest(&argc, argv);
  ::testing::AddGlobalTestEnvironment(new ShadowLogCheck);
  return RUN_ALL_TESTS();
}
