#pragma once

#include "lightcrl/checkpoint.hpp"
#include "lightcrl/data.hpp"
#include "lightcrl/errors.hpp"
#include "lightcrl/eval.hpp"
#include "lightcrl/gradcheck.hpp"
#include "lightcrl/loss.hpp"
#include "lightcrl/model.hpp"
#include "lightcrl/optim.hpp"
#include "lightcrl/rng.hpp"
#include "lightcrl/tensor.hpp"
#include "lightcrl/trainer.hpp"
#include "lightcrl/version.hpp"
