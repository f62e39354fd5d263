#pragma once

// Umbrella header for the sub-token translation ensembling library.

#include "srt/baselines.hpp"
#include "srt/checksum.hpp"
#include "srt/errors.hpp"
#include "srt/field.hpp"
#include "srt/image.hpp"
#include "srt/perturb.hpp"
#include "srt/pipeline.hpp"
#include "srt/prng.hpp"
#include "srt/sr_scalar.hpp"
#include "srt/synthetic.hpp"
#include "srt/tensor.hpp"
#include "srt/vit.hpp"
#include "srt/viz.hpp"
#include "srt/weights.hpp"
