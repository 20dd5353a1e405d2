#pragma once

#include "evdetect/adam.hpp"
#include "evdetect/autodiff.hpp"
#include "evdetect/checkpoint.hpp"
#include "evdetect/data.hpp"
#include "evdetect/engine.hpp"
#include "evdetect/eval.hpp"
#include "evdetect/grad_check.hpp"
#include "evdetect/memory.hpp"
#include "evdetect/model.hpp"
#include "evdetect/spot.hpp"
#include "evdetect/tensor.hpp"
#include "evdetect/time.hpp"
#include "evdetect/training.hpp"
