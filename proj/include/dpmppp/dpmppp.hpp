#pragma once

#include "dpmppp/errors.hpp"
#include "dpmppp/special.hpp"
#include "dpmppp/quadrature.hpp"
#include "dpmppp/basis.hpp"
#include "dpmppp/rng.hpp"
#include "dpmppp/parallel.hpp"
#include "dpmppp/pointprocess.hpp"
#include "dpmppp/scenarios.hpp"
#include "dpmppp/optim.hpp"
#include "dpmppp/objective.hpp"
#include "dpmppp/inference.hpp"
#include "dpmppp/evaluate.hpp"
#include "dpmppp/diagnostics.hpp"
#include "dpmppp/io.hpp"
