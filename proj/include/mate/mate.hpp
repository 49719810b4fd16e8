#pragma once

#include "mate/assoc.hpp"
#include "mate/data.hpp"
#include "mate/errors.hpp"
#include "mate/evalkit.hpp"
#include "mate/experiment.hpp"
#include "mate/matrix.hpp"
#include "mate/net.hpp"
#include "mate/objective.hpp"
#include "mate/rng.hpp"
#include "mate/trainer.hpp"
