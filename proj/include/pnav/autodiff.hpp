#pragma once

#include "pnav/autodiff/adam.hpp"
#include "pnav/autodiff/array.hpp"
#include "pnav/autodiff/grad_check.hpp"
#include "pnav/autodiff/serialize.hpp"
#include "pnav/autodiff/tape.hpp"
