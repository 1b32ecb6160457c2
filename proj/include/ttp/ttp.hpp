/*
 * ttp - weak-perspective pose and low-rank deformation fitting.
 *
 * File: include/ttp/ttp.hpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "ttp/error.hpp"
#include "ttp/geometry.hpp"
#include "ttp/mesh.hpp"
#include "ttp/raster.hpp"
#include "ttp/deform.hpp"
#include "ttp/lbfgs.hpp"
#include "ttp/objective.hpp"
#include "ttp/solver.hpp"
#include "ttp/diff.hpp"
#include "ttp/losses.hpp"
#include "ttp/io.hpp"
#include "ttp/harness.hpp"
