// Copyright 2026 The aptsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "aptsim/config.hpp"
#include "aptsim/cost_model.hpp"
#include "aptsim/domain.hpp"
#include "aptsim/experiment.hpp"
#include "aptsim/memory_pool.hpp"
#include "aptsim/metrics.hpp"
#include "aptsim/report.hpp"
#include "aptsim/scheduler.hpp"
#include "aptsim/sim_engine.hpp"
#include "aptsim/workload.hpp"
