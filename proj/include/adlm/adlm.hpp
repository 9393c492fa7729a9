// Copyright 2026 The ADLM Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "adlm/checkpoint.hpp"
#include "adlm/common.hpp"
#include "adlm/config.hpp"
#include "adlm/corpus.hpp"
#include "adlm/decoding.hpp"
#include "adlm/eval.hpp"
#include "adlm/model.hpp"
#include "adlm/ops.hpp"
#include "adlm/optim.hpp"
#include "adlm/pipeline.hpp"
#include "adlm/repl.hpp"
#include "adlm/tensor.hpp"
#include "adlm/training.hpp"
