#pragma once

#include "covreg/archive.hpp"
#include "covreg/baselines.hpp"
#include "covreg/chain.hpp"
#include "covreg/common.hpp"
#include "covreg/diagnostics.hpp"
#include "covreg/gibbs.hpp"
#include "covreg/gp_kernel.hpp"
#include "covreg/init.hpp"
#include "covreg/io.hpp"
#include "covreg/kappa.hpp"
#include "covreg/model.hpp"
#include "covreg/model_core.hpp"
#include "covreg/random.hpp"
#include "covreg/spline.hpp"
