#pragma once

#include "hrf/core.hpp"
#include "hrf/lie_core.hpp"
#include "hrf/invariant_geometry.hpp"
#include "hrf/ode.hpp"
#include "hrf/flow_engine.hpp"
#include "hrf/blowdown.hpp"
#include "hrf/geometric_model.hpp"
#include "hrf/soliton_check.hpp"
#include "hrf/scenario.hpp"
