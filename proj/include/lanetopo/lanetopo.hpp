#pragma once

#include "lanetopo/assignment.hpp"
#include "lanetopo/core.hpp"
#include "lanetopo/diagnostics.hpp"
#include "lanetopo/focal.hpp"
#include "lanetopo/geometry.hpp"
#include "lanetopo/gradcheck.hpp"
#include "lanetopo/heads.hpp"
#include "lanetopo/losses.hpp"
#include "lanetopo/matrix.hpp"
#include "lanetopo/metrics.hpp"
#include "lanetopo/nn.hpp"
#include "lanetopo/rng.hpp"
#include "lanetopo/scene_io.hpp"
#include "lanetopo/sgnn.hpp"
#include "lanetopo/synth.hpp"
