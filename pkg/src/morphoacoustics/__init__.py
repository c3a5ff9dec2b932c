"""Diffeomorphic surface matching (LDDMM with a currents data term) for
head/ear meshes, plus SFRS and spatial-correlation analysis of HRTF sets."""
from .mesh import SurfaceMesh, ValidationReport, load_mesh, save_mesh, validate, translate_align
from .currents import CurrentRep, CurrentsParams, current_of, currents_inner, data_term_E, grad_data_term
from .lddmm import (MatchParams, MatchReport, MomentumField, apply_flow, cauchy_kernel,
                    flow_snapshots, integrate_flow, match, objective_J, regularization_energy,
                    velocity_at)
from .pipeline import PipelineResult, SubjectAssets, mirror_direction, synth_all, synth_ear_only
from .hrtf import HrtfSet, SfrsMap, correlation_curve, sfrs, spatial_correlation, sphere_hrtf_oracle

__version__ = "0.1.0"
