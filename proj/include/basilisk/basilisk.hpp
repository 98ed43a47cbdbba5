#pragma once

#include "basilisk/attention/wb_attention.hpp"
#include "basilisk/bench/membench.hpp"
#include "basilisk/data/jsonl.hpp"
#include "basilisk/data/planted.hpp"
#include "basilisk/data/run_config.hpp"
#include "basilisk/data/sample.hpp"
#include "basilisk/data/tokenizer.hpp"
#include "basilisk/metrics/metrics.hpp"
#include "basilisk/model/checkpoint.hpp"
#include "basilisk/model/config.hpp"
#include "basilisk/model/model.hpp"
#include "basilisk/moe/moe.hpp"
#include "basilisk/numerics/autodiff.hpp"
#include "basilisk/numerics/finite_diff.hpp"
#include "basilisk/numerics/memory.hpp"
#include "basilisk/numerics/ops.hpp"
#include "basilisk/numerics/parameters.hpp"
#include "basilisk/numerics/random.hpp"
#include "basilisk/numerics/tape.hpp"
#include "basilisk/numerics/tensor.hpp"
#include "basilisk/ssm/mamba.hpp"
#include "basilisk/train/fim.hpp"
#include "basilisk/train/imbalance.hpp"
#include "basilisk/train/optimizer.hpp"
#include "basilisk/train/sift.hpp"
#include "basilisk/train/trainer.hpp"
