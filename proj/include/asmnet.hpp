/**
 * @file asmnet.hpp
 * @brief Umbrella header.
 */
#pragma once

#include "asmnet/error.hpp"
#include "asmnet/evaluation.hpp"
#include "asmnet/fusion.hpp"
#include "asmnet/nifti.hpp"
#include "asmnet/nn/fpenv.hpp"
#include "asmnet/nn/model.hpp"
#include "asmnet/nn/optim.hpp"
#include "asmnet/nn/weights_io.hpp"
#include "asmnet/pipeline.hpp"
#include "asmnet/seed.hpp"
#include "asmnet/slice_export.hpp"
#include "asmnet/subject.hpp"
#include "asmnet/synth.hpp"
#include "asmnet/tiling.hpp"
#include "asmnet/transfer.hpp"
#include "asmnet/volume.hpp"
