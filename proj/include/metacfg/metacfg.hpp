#pragma once

#include "metacfg/rng.hpp"
#include "metacfg/grammar.hpp"
#include "metacfg/random_grammar.hpp"
#include "metacfg/sampler.hpp"
#include "metacfg/corpus.hpp"
#include "metacfg/verifier.hpp"
#include "metacfg/ga.hpp"
#include "metacfg/oracle.hpp"
#include "metacfg/model.hpp"
#include "metacfg/training.hpp"
#include "metacfg/probe.hpp"
#include "metacfg/eval.hpp"
#include "metacfg/pipeline.hpp"
