// noi: trainable optimal interpolation for gappy space-time fields.
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "noi/bench.hpp"
#include "noi/core.hpp"
#include "noi/field.hpp"
#include "noi/io.hpp"
#include "noi/nn.hpp"
#include "noi/obs.hpp"
#include "noi/oi.hpp"
#include "noi/prior.hpp"
#include "noi/solver.hpp"
#include "noi/sparse.hpp"
#include "noi/spde.hpp"
#include "noi/tape.hpp"
#include "noi/tensor.hpp"
#include "noi/training.hpp"
#include "noi/variational.hpp"
