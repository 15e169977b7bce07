#pragma once

// Umbrella header for the whole library.

#include "loralab/adapters.hpp"
#include "loralab/autodiff.hpp"
#include "loralab/checkpoint.hpp"
#include "loralab/cli.hpp"
#include "loralab/config.hpp"
#include "loralab/dataset.hpp"
#include "loralab/eigen.hpp"
#include "loralab/ensemble.hpp"
#include "loralab/error.hpp"
#include "loralab/harness.hpp"
#include "loralab/io.hpp"
#include "loralab/matrix.hpp"
#include "loralab/metrics.hpp"
#include "loralab/model.hpp"
#include "loralab/parallel.hpp"
#include "loralab/rng.hpp"
#include "loralab/svg.hpp"
#include "loralab/theory.hpp"
#include "loralab/training.hpp"
