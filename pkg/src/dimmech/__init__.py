"""Dimensioned contact Hamiltonian mechanics."""
from .errors import *  # noqa: F401,F403
from .measurand import (
    Dimension,
    MeasurandSpace,
    TypedNumber,
    UnitSystem,
    convert,
    dimension_of,
    format_dimension,
    induced_unit_scale,
    parse_dimension,
    ratio,
    typed_add,
    typed_div,
    typed_mul,
)
from .parser import parse_expression
from .fields import (
    BivectorField,
    ChartDomain,
    ScalarField,
    VectorField,
    eval_field,
    grad,
    hess,
    lie_bracket,
    lie_derivative_bivector,
    parse_field,
    schouten_pi_pi,
    wedge_R_pi,
)
from .bundle import (
    Derivation,
    Factor,
    ProductChart,
    TrivialLineBundle,
    apply_derivation,
    base_product,
    compose_factors,
    der_bracket,
    der_map,
    der_pushforward,
    jet_pairing,
    jet_prolong,
    product_projections,
    pullback_section,
    ratio_function,
)
from .jacobi import (
    CertificationReport,
    LichnerowiczPair,
    certify,
    check_jacobi_pair,
    hamiltonian_derivation,
    hamiltonian_vf,
    jacobi_bracket,
)
from .contact import (
    ContactForm,
    JetChart,
    canonical_contact,
    check_bracket_relations,
    comoment,
    contact_form_of,
    contact_to_jacobi,
    jet_chart,
    linear_section,
)
from .relations import (
    coisotropic_check,
    jacobi_map_check,
    jet_lift_diffeo,
    jet_lift_graph_check,
    jet_lift_graph_samples,
    lgraph_check,
    product_jacobi,
)
from .dynamics import FlowProblem, Trajectory, integrate_flow, monitor_energy
from .scenario import bundled_scenario, load_scenario, validate_dimensions

__version__ = "0.1.0"
