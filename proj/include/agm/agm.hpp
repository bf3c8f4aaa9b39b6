#pragma once

#include "agm/bridge.hpp"
#include "agm/checkpoint.hpp"
#include "agm/cli.hpp"
#include "agm/config.hpp"
#include "agm/data.hpp"
#include "agm/eval.hpp"
#include "agm/nets.hpp"
#include "agm/objective.hpp"
#include "agm/optimizer.hpp"
#include "agm/rng.hpp"
#include "agm/sampler.hpp"
#include "agm/tensor.hpp"
#include "agm/trainer.hpp"
