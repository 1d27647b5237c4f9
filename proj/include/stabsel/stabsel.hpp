#pragma once

#include "stabsel/error.hpp"
#include "stabsel/rng.hpp"
#include "stabsel/prediction_set.hpp"
#include "stabsel/selection.hpp"
#include "stabsel/mechanism.hpp"
#include "stabsel/dataset.hpp"
#include "stabsel/conformal.hpp"
#include "stabsel/predictors.hpp"
#include "stabsel/scenarios.hpp"
#include "stabsel/online.hpp"
#include "stabsel/experiments.hpp"
#include "stabsel/report.hpp"
