#pragma once

#include "aoisnn/checkpoint.hpp"
#include "aoisnn/common.hpp"
#include "aoisnn/dataset.hpp"
#include "aoisnn/ensemble.hpp"
#include "aoisnn/events.hpp"
#include "aoisnn/inference.hpp"
#include "aoisnn/lif.hpp"
#include "aoisnn/network.hpp"
#include "aoisnn/objective.hpp"
#include "aoisnn/rng.hpp"
#include "aoisnn/tape.hpp"
#include "aoisnn/tensor.hpp"
#include "aoisnn/train.hpp"
