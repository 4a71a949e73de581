// Umbrella header.
#pragma once

#include "fersim/adapter.hpp"
#include "fersim/agents.hpp"
#include "fersim/config.hpp"
#include "fersim/corpus.hpp"
#include "fersim/errors.hpp"
#include "fersim/expression.hpp"
#include "fersim/lattice.hpp"
#include "fersim/metrics.hpp"
#include "fersim/rng.hpp"
#include "fersim/runner.hpp"
#include "fersim/schedule.hpp"
#include "fersim/synthetic.hpp"
