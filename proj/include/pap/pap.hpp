#pragma once

// Umbrella header for the whole library.

#include "pap/affinity.hpp"
#include "pap/autodiff.hpp"
#include "pap/config.hpp"
#include "pap/diffusion.hpp"
#include "pap/errors.hpp"
#include "pap/experiment.hpp"
#include "pap/gradcheck.hpp"
#include "pap/image_io.hpp"
#include "pap/metrics.hpp"
#include "pap/objectives.hpp"
#include "pap/ops.hpp"
#include "pap/papnet.hpp"
#include "pap/random.hpp"
#include "pap/scenes.hpp"
#include "pap/stats.hpp"
#include "pap/tensor.hpp"
#include "pap/types.hpp"
