from .drbg import Drbg, Seed, child_seed
from .dkg import DkgResult, InvalidDealing, SecretShare, VssDealing, dkg_round
from .groups import DEMO, SECP256K1, Group, get_group
from .keys import KeyPair, keygen, schnorr_sign, schnorr_verify
from .lsag import RingSignature, RingTooSmall, SignerNotInRing, key_image, lsag_sign, lsag_verify
from .threshold import (
    AuthenticationFailure,
    NotEnoughShares,
    PartialDecryption,
    ThresholdCiphertext,
    combine,
    partial_decrypt,
    threshold_encrypt,
)
