// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sflora/matrix.hpp"
#include "sflora/model.hpp"
#include "sflora/federation.hpp"
#include "sflora/costmodel.hpp"
#include "sflora/timeline.hpp"
#include "sflora/scheduler.hpp"
#include "sflora/schedule_check.hpp"
#include "sflora/dataset.hpp"
#include "sflora/metrics.hpp"
#include "sflora/engine.hpp"
#include "sflora/config.hpp"
#include "sflora/experiment.hpp"
