#pragma once

#include "gsstream/abr.hpp"
#include "gsstream/autodiff.hpp"
#include "gsstream/deformation.hpp"
#include "gsstream/errors.hpp"
#include "gsstream/geometry.hpp"
#include "gsstream/ladder.hpp"
#include "gsstream/nn.hpp"
#include "gsstream/pipeline.hpp"
#include "gsstream/policy.hpp"
#include "gsstream/primitive.hpp"
#include "gsstream/qoe.hpp"
#include "gsstream/renderer.hpp"
#include "gsstream/report.hpp"
#include "gsstream/rng.hpp"
#include "gsstream/saliency.hpp"
#include "gsstream/simulator.hpp"
#include "gsstream/synth.hpp"
#include "gsstream/tiling.hpp"
#include "gsstream/training.hpp"
#include "gsstream/traces.hpp"
