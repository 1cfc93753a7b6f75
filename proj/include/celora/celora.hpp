// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "celora/action_space.hpp"
#include "celora/approximator.hpp"
#include "celora/common.hpp"
#include "celora/config.hpp"
#include "celora/distill.hpp"
#include "celora/edge_decider.hpp"
#include "celora/harness.hpp"
#include "celora/phy.hpp"
#include "celora/scheduler.hpp"
#include "celora/simcore.hpp"
#include "celora/slot_env.hpp"
#include "celora/teacher.hpp"
