#pragma once

// Umbrella include.

#include "bakeoff/core.hpp"
#include "bakeoff/dataset.hpp"
#include "bakeoff/ensemble.hpp"
#include "bakeoff/experiment.hpp"
#include "bakeoff/external.hpp"
#include "bakeoff/gbdt.hpp"
#include "bakeoff/learner.hpp"
#include "bakeoff/metrics.hpp"
#include "bakeoff/mlp.hpp"
#include "bakeoff/search_space.hpp"
#include "bakeoff/soft_odt.hpp"
#include "bakeoff/tpe.hpp"
#include "bakeoff/train_loop.hpp"
