#pragma once

#include "nhmm/analysis.hpp"
#include "nhmm/common.hpp"
#include "nhmm/data.hpp"
#include "nhmm/gaussian.hpp"
#include "nhmm/kalman.hpp"
#include "nhmm/linalg.hpp"
#include "nhmm/model.hpp"
#include "nhmm/nn.hpp"
#include "nhmm/parallel.hpp"
#include "nhmm/smc.hpp"
#include "nhmm/train.hpp"
