#pragma once

// Umbrella header for the model library. The command-line layer
// (tdcmn/cli.hpp) additionally needs CLI11 on the include path.

#include "tdcmn/error.hpp"
#include "tdcmn/tensor.hpp"
#include "tdcmn/autodiff.hpp"
#include "tdcmn/params.hpp"
#include "tdcmn/tdc.hpp"
#include "tdcmn/data.hpp"
#include "tdcmn/models.hpp"
#include "tdcmn/checkpoint.hpp"
#include "tdcmn/train.hpp"
#include "tdcmn/config.hpp"
