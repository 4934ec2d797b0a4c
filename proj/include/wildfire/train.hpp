#pragma once

#include "wildfire/train/adamw.hpp"
#include "wildfire/train/checkpoint.hpp"
#include "wildfire/train/config.hpp"
#include "wildfire/train/dice.hpp"
#include "wildfire/train/schedule.hpp"
#include "wildfire/train/trainer.hpp"
