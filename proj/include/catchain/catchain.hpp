#pragma once

#include "catchain/error.hpp"
#include "catchain/core_prob.hpp"
#include "catchain/csv.hpp"
#include "catchain/decay_seq.hpp"
#include "catchain/coupling_bounds.hpp"
#include "catchain/links.hpp"
#include "catchain/kernels.hpp"
#include "catchain/model_zoo.hpp"
#include "catchain/simulate.hpp"
#include "catchain/dependence.hpp"
#include "catchain/estimate.hpp"
#include "catchain/config.hpp"
#include "catchain/cli.hpp"
