#pragma once

#include "canerv/common.hpp"
#include "canerv/config.hpp"
#include "canerv/video_io.hpp"
#include "canerv/ops.hpp"
#include "canerv/dfa.hpp"
#include "canerv/hsa.hpp"
#include "canerv/network.hpp"
#include "canerv/metrics.hpp"
#include "canerv/quantize.hpp"
#include "canerv/arith_coder.hpp"
#include "canerv/bitstream.hpp"
#include "canerv/trainer.hpp"
#include "canerv/dsa.hpp"
#include "canerv/plot.hpp"
