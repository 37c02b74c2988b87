#pragma once

// Umbrella header: regression forests with per-feature attribution, plus the
// evaluation and timing tooling around them.

#include "treexplain/attribution.hpp"
#include "treexplain/bench.hpp"
#include "treexplain/dataset.hpp"
#include "treexplain/errors.hpp"
#include "treexplain/evaluation.hpp"
#include "treexplain/forest.hpp"
#include "treexplain/io.hpp"
#include "treexplain/parallel.hpp"
