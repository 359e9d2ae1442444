#pragma once

#include "pisco/eval.hpp"
#include "pisco/fit.hpp"
#include "pisco/io.hpp"
#include "pisco/kspace.hpp"
#include "pisco/loss.hpp"
#include "pisco/nik.hpp"
#include "pisco/optim.hpp"
#include "pisco/sampling.hpp"
#include "pisco/solver.hpp"
#include "pisco/types.hpp"
#include "pisco/validation.hpp"
