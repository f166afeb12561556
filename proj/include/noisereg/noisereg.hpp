#pragma once

#include "noisereg/decomposition.hpp"
#include "noisereg/diagnostics.hpp"
#include "noisereg/experiment.hpp"
#include "noisereg/matrix.hpp"
#include "noisereg/optimizer.hpp"
#include "noisereg/problem.hpp"
#include "noisereg/random.hpp"
#include "noisereg/stats.hpp"
