#pragma once

#include "twoswitch/channel.hpp"
#include "twoswitch/closed_loop.hpp"
#include "twoswitch/errors.hpp"
#include "twoswitch/estimator.hpp"
#include "twoswitch/experiment.hpp"
#include "twoswitch/numerics.hpp"
#include "twoswitch/parallel.hpp"
#include "twoswitch/presets.hpp"
#include "twoswitch/reports.hpp"
#include "twoswitch/rng.hpp"
#include "twoswitch/scenario.hpp"
#include "twoswitch/separation_dp.hpp"
#include "twoswitch/stability.hpp"
#include "twoswitch/trajectory.hpp"
