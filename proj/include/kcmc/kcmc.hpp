#pragma once

#include "kcmc/types.hpp"
#include "kcmc/rng.hpp"
#include "kcmc/data.hpp"
#include "kcmc/synthetic.hpp"
#include "kcmc/propensity.hpp"
#include "kcmc/policy.hpp"
#include "kcmc/divergence.hpp"
#include "kcmc/kernels.hpp"
#include "kcmc/quantile.hpp"
#include "kcmc/constraints.hpp"
#include "kcmc/dual.hpp"
#include "kcmc/estimators.hpp"
#include "kcmc/learning.hpp"
#include "kcmc/experiment.hpp"
