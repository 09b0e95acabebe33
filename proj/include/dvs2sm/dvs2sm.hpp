// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dvs2sm/aer_stream.hpp"
#include "dvs2sm/fixed_point.hpp"
#include "dvs2sm/histogram.hpp"
#include "dvs2sm/network_io.hpp"
#include "dvs2sm/normalizer.hpp"
#include "dvs2sm/nullhop_core.hpp"
#include "dvs2sm/pipeline_sim.hpp"
#include "dvs2sm/sparsity_codec.hpp"
