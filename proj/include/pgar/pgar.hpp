#pragma once

#include "pgar/config.hpp"
#include "pgar/dataset.hpp"
#include "pgar/errors.hpp"
#include "pgar/experiment.hpp"
#include "pgar/fusion.hpp"
#include "pgar/matrix.hpp"
#include "pgar/metrics.hpp"
#include "pgar/model.hpp"
#include "pgar/optimizer.hpp"
#include "pgar/plot_data.hpp"
#include "pgar/reflexes.hpp"
#include "pgar/rng.hpp"
#include "pgar/stability.hpp"
#include "pgar/trace.hpp"
