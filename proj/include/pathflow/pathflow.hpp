// Copyright 2026 The pathflow Authors.
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


#ifndef PATHFLOW_PATHFLOW_HPP
#define PATHFLOW_PATHFLOW_HPP

#include <pathflow/bench.hpp>
#include <pathflow/config.hpp>
#include <pathflow/error.hpp>
#include <pathflow/estimators.hpp>
#include <pathflow/flows/flow.hpp>
#include <pathflow/flows/flow_target.hpp>
#include <pathflow/flows/mixture.hpp>
#include <pathflow/flows/model.hpp>
#include <pathflow/gradcheck.hpp>
#include <pathflow/io/checkpoint.hpp>
#include <pathflow/io/history.hpp>
#include <pathflow/metrics.hpp>
#include <pathflow/numerics/dense.hpp>
#include <pathflow/numerics/finite_difference.hpp>
#include <pathflow/numerics/mlp.hpp>
#include <pathflow/numerics/tape.hpp>
#include <pathflow/parallel.hpp>
#include <pathflow/random.hpp>
#include <pathflow/recursion.hpp>
#include <pathflow/targets/base_density.hpp>
#include <pathflow/targets/gmm.hpp>
#include <pathflow/targets/phi4.hpp>
#include <pathflow/targets/target.hpp>
#include <pathflow/training.hpp>

#endif
