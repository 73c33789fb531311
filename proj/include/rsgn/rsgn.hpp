#pragma once

#include "rsgn/core.hpp"
#include "rsgn/dataset.hpp"
#include "rsgn/harness.hpp"
#include "rsgn/problems.hpp"
#include "rsgn/sketch.hpp"
#include "rsgn/solver.hpp"
#include "rsgn/subproblem.hpp"
