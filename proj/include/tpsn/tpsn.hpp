#pragma once

#include "tpsn/core.hpp"
#include "tpsn/engine.hpp"
#include "tpsn/error.hpp"
#include "tpsn/fidelity.hpp"
#include "tpsn/gradcheck.hpp"
#include "tpsn/io.hpp"
#include "tpsn/metrics.hpp"
#include "tpsn/pyramid.hpp"
#include "tpsn/regularizers.hpp"
#include "tpsn/run.hpp"
#include "tpsn/sampler.hpp"
#include "tpsn/synth.hpp"
#include "tpsn/templates.hpp"
