#pragma once

#include "velobss/core.hpp"
#include "velobss/io.hpp"
#include "velobss/trajectory.hpp"
#include "velobss/binning.hpp"
#include "velobss/localframes.hpp"
#include "velobss/flowcoords.hpp"
#include "velobss/septest.hpp"
#include "velobss/synthmix.hpp"
#include "velobss/config.hpp"
