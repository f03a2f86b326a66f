#pragma once

#include "mac/errors.hpp"
#include "mac/random.hpp"
#include "mac/autodiff.hpp"
#include "mac/ssm.hpp"
#include "mac/mamba.hpp"
#include "mac/groups.hpp"
#include "mac/attention.hpp"
#include "mac/data.hpp"
#include "mac/synth.hpp"
#include "mac/model.hpp"
#include "mac/metrics.hpp"
#include "mac/train.hpp"
#include "mac/baselines.hpp"
