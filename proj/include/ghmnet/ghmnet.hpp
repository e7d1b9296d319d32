#pragma once

// Everything except the experiment runner, which also needs yaml-cpp.

#include "ghmnet/bp.hpp"
#include "ghmnet/checks.hpp"
#include "ghmnet/diffusion.hpp"
#include "ghmnet/error.hpp"
#include "ghmnet/ghm.hpp"
#include "ghmnet/mp.hpp"
#include "ghmnet/nets.hpp"
#include "ghmnet/oracle.hpp"
#include "ghmnet/relu_approx.hpp"
#include "ghmnet/rng.hpp"
#include "ghmnet/text_io.hpp"
#include "ghmnet/topology.hpp"
#include "ghmnet/train.hpp"
