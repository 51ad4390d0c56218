#pragma once

#include "sublap/error.hpp"
#include "sublap/linalg.hpp"
#include "sublap/model.hpp"
#include "sublap/data.hpp"
#include "sublap/train.hpp"
#include "sublap/io.hpp"
#include "sublap/curvature.hpp"
#include "sublap/posterior.hpp"
#include "sublap/subspace.hpp"
#include "sublap/predictive.hpp"
#include "sublap/metrics.hpp"
#include "sublap/experiment.hpp"
