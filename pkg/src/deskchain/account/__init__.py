"""Account-model chain with gas-metered native programs."""

from .block import (
    AccountBlock,
    AccountBlockError,
    AccountChain,
    AccountHeader,
    replay,
    tx_root,
    validate_account_block,
)
from .programs import REGISTRY, Booking, Hotel, Program, Token, Train
from .state import (
    CONTRACT,
    DEPLOY,
    EXTERNAL,
    Account,
    AccountTx,
    Event,
    GasSchedule,
    InsufficientBalanceForFee,
    IntrinsicGasTooLow,
    Malformed,
    OutOfGas,
    Receipt,
    Revert,
    UnknownProgram,
    WorldState,
    call_data,
    contract_address,
    deploy_contract,
    deploy_data,
    invoke,
    make_tx,
    state_transition,
)
