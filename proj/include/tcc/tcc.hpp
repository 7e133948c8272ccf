#pragma once

#include "tcc/alignment.hpp"
#include "tcc/autodiff.hpp"
#include "tcc/baselines.hpp"
#include "tcc/checkpoint.hpp"
#include "tcc/data.hpp"
#include "tcc/embedder.hpp"
#include "tcc/error.hpp"
#include "tcc/grad_check.hpp"
#include "tcc/loss_checks.hpp"
#include "tcc/losses.hpp"
#include "tcc/metrics.hpp"
#include "tcc/sequence.hpp"
#include "tcc/tensor.hpp"
#include "tcc/train.hpp"
