#pragma once

#include "vlamd/backbone.hpp"
#include "vlamd/beam.hpp"
#include "vlamd/checkpoint.hpp"
#include "vlamd/config.hpp"
#include "vlamd/errors.hpp"
#include "vlamd/eval.hpp"
#include "vlamd/image_io.hpp"
#include "vlamd/losses.hpp"
#include "vlamd/model.hpp"
#include "vlamd/nn.hpp"
#include "vlamd/rng.hpp"
#include "vlamd/selfcheck.hpp"
#include "vlamd/synth.hpp"
#include "vlamd/tensor.hpp"
#include "vlamd/trainer.hpp"
#include "vlamd/transd.hpp"
#include "vlamd/vlad.hpp"
