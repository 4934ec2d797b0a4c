#pragma once

#include "wildfire/autodiff/attention.hpp"
#include "wildfire/autodiff/conv.hpp"
#include "wildfire/autodiff/gradcheck.hpp"
#include "wildfire/autodiff/norm.hpp"
#include "wildfire/autodiff/ops.hpp"
#include "wildfire/autodiff/tensor.hpp"
