#pragma once

// Umbrella header for the drift-aware online learning engine.

#include "driftlearn/adapt.hpp"
#include "driftlearn/checkpoint.hpp"
#include "driftlearn/config.hpp"
#include "driftlearn/data.hpp"
#include "driftlearn/drift.hpp"
#include "driftlearn/engine.hpp"
#include "driftlearn/losses.hpp"
#include "driftlearn/memory.hpp"
#include "driftlearn/metrics.hpp"
#include "driftlearn/model.hpp"
#include "driftlearn/rng.hpp"
#include "driftlearn/stable.hpp"
#include "driftlearn/synth.hpp"
#include "driftlearn/tensor.hpp"
