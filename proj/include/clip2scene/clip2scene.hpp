#pragma once

// Umbrella header.
#include "clip2scene/bundle_io.hpp"
#include "clip2scene/config.hpp"
#include "clip2scene/error.hpp"
#include "clip2scene/eval.hpp"
#include "clip2scene/geom.hpp"
#include "clip2scene/losses.hpp"
#include "clip2scene/model.hpp"
#include "clip2scene/pairs.hpp"
#include "clip2scene/synth.hpp"
#include "clip2scene/trainer.hpp"
