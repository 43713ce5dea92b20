import numpy as np
import scipy.linalg as sla

RIDGE = 1e-12


def sym_solve(S, B):
    """Solve S X = B for symmetric PSD S; one ridge retry, None if still singular."""
    S = 0.5 * (S + S.T)
    for attempt in range(2):
        try:
            c = sla.cho_factor(S, check_finite=True)
            X = sla.cho_solve(c, B)
            if np.all(np.isfinite(X)):
                return X
        except (np.linalg.LinAlgError, ValueError):
            pass
        if attempt == 0:
            dim = S.shape[0]
            S = S + RIDGE * max(np.trace(S), np.finfo(float).tiny) / dim * np.eye(dim)
    return None
