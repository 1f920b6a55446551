#pragma once

#include "itnet/adam.hpp"
#include "itnet/atlas.hpp"
#include "itnet/autodiff.hpp"
#include "itnet/config.hpp"
#include "itnet/epochs.hpp"
#include "itnet/io.hpp"
#include "itnet/layers.hpp"
#include "itnet/linalg.hpp"
#include "itnet/model.hpp"
#include "itnet/random.hpp"
#include "itnet/receptive_field.hpp"
#include "itnet/savgol.hpp"
#include "itnet/scenario.hpp"
#include "itnet/spectrum.hpp"
#include "itnet/stats.hpp"
#include "itnet/synth.hpp"
#include "itnet/tensor.hpp"
#include "itnet/training.hpp"
