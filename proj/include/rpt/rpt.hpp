#pragma once

#include "rpt/checkpoint.hpp"
#include "rpt/config.hpp"
#include "rpt/markov.hpp"
#include "rpt/model.hpp"
#include "rpt/permutation.hpp"
#include "rpt/prob.hpp"
#include "rpt/report.hpp"
#include "rpt/rng.hpp"
#include "rpt/sampler.hpp"
#include "rpt/source.hpp"
#include "rpt/synthetic.hpp"
