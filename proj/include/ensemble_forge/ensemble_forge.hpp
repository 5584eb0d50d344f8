#pragma once

#include "ensemble_forge/bootstrap.hpp"
#include "ensemble_forge/ensemble.hpp"
#include "ensemble_forge/error.hpp"
#include "ensemble_forge/harness.hpp"
#include "ensemble_forge/mnist_io.hpp"
#include "ensemble_forge/nnet.hpp"
#include "ensemble_forge/orchestrator.hpp"
#include "ensemble_forge/trainer.hpp"
