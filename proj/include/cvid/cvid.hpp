#pragma once

#include "cvid/checkpoint.hpp"
#include "cvid/checks.hpp"
#include "cvid/errors.hpp"
#include "cvid/image.hpp"
#include "cvid/image_io.hpp"
#include "cvid/inference.hpp"
#include "cvid/losses.hpp"
#include "cvid/metrics.hpp"
#include "cvid/model.hpp"
#include "cvid/rain_synth.hpp"
#include "cvid/training.hpp"
